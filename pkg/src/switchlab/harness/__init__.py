from .config import ConfigError, ScenarioConfig, load_config, parse_config, preset_names
from .output import emit_outputs, read_summary
from .runner import ScenarioResult, SummaryRow, run_scenario, slope_fit
