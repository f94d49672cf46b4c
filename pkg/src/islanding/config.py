"""Configuration file support for the islanding solver.

Supports JSON and YAML configuration files with:
- Solver settings (granularity, region correction, DG deviation multiplier)
- Power-flow settings (tolerance, iteration cap, voltage band overrides)
- Output preferences
- Case-specific overrides keyed by case name
- Command-line overrides
"""

import json
from pathlib import Path
from typing import Any, Dict, Optional, Union

from pydantic import BaseModel, Field


class SolverSettings(BaseModel):
    """Partitioning settings."""
    granularity: float = Field(1.0, gt=0, description="Power rounding step in kW")
    correction: bool = Field(True, description="Commit critical loads before the knapsack")
    correction_min_buses: int = Field(
        0, ge=0, description="Regions with fewer buses skip region correction"
    )
    sigma_multiplier: float = Field(
        1.0, ge=0, description="Standard deviations subtracted from DG forecasts"
    )
    oracle: bool = Field(False, description="Cross-check small regions by enumeration")
    oracle_max_buses: int = Field(12, ge=1, le=20, description="Largest region the oracle checks")
    workers: int = Field(4, ge=1, description="Regions solved concurrently")

    model_config = {"extra": "allow"}


class FlowSettings(BaseModel):
    """Backward/forward sweep settings."""
    tolerance: float = Field(1e-6, gt=0, description="Convergence threshold in pu")
    max_iterations: int = Field(100, ge=1, description="Sweep iteration cap")
    umin: Optional[float] = Field(None, description="Override of the case lower voltage limit")
    umax: Optional[float] = Field(None, description="Override of the case upper voltage limit")

    model_config = {"extra": "allow"}


class OutputSettings(BaseModel):
    """Output directory and format preferences."""
    format: str = Field("table", description="Output format: table, json, dot")
    output_dir: str = Field("artifacts", description="Directory for saved reports")
    json_indent: int = Field(2, ge=0, description="Indentation of JSON reports")

    model_config = {"extra": "allow"}


class CaseSettings(BaseModel):
    """Case-specific overrides."""
    granularity: Optional[float] = Field(None, gt=0)
    correction: Optional[bool] = None
    correction_min_buses: Optional[int] = Field(None, ge=0)
    sigma_multiplier: Optional[float] = Field(None, ge=0)
    umin: Optional[float] = None
    umax: Optional[float] = None
    faults: Optional[list] = Field(None, description="Default fault list as 'A-B' strings")

    model_config = {"extra": "allow"}


class IslandingConfig(BaseModel):
    """Root configuration."""
    solver_settings: SolverSettings = Field(default_factory=SolverSettings)
    flow_settings: FlowSettings = Field(default_factory=FlowSettings)
    output_settings: OutputSettings = Field(default_factory=OutputSettings)
    case_specific: Dict[str, CaseSettings] = Field(
        default_factory=dict, description="Overrides keyed by case name"
    )

    model_config = {"extra": "allow"}


class ConfigLoader:
    """Load and manage configuration from files."""

    SUPPORTED_FORMATS = ['.json', '.yaml', '.yml']

    @staticmethod
    def load(config_path: Union[str, Path]) -> IslandingConfig:
        """Load configuration from file.

        Raises:
            FileNotFoundError: If config file doesn't exist
            ValueError: If config file format is unsupported or invalid
        """
        config_path = Path(config_path)

        if not config_path.exists():
            raise FileNotFoundError(f"Config file not found: {config_path}")

        suffix = config_path.suffix.lower()
        if suffix == '.json':
            return ConfigLoader._load_json(config_path)
        elif suffix in ['.yaml', '.yml']:
            return ConfigLoader._load_yaml(config_path)
        raise ValueError(
            f"Unsupported config format: {suffix}. "
            f"Supported formats: {', '.join(ConfigLoader.SUPPORTED_FORMATS)}. "
            f"File: {config_path}. "
            "Please use .json or .yaml file extension."
        )

    @staticmethod
    def _load_json(config_path: Path) -> IslandingConfig:
        try:
            data = json.loads(config_path.read_text(encoding='utf-8'))
        except json.JSONDecodeError as e:
            raise ValueError(
                f"Invalid JSON in config file: {e}. "
                f"File: {config_path}. "
                "Please check JSON syntax. Common issues: missing commas, unquoted strings, "
                "trailing commas."
            )
        return ConfigLoader._build(data, config_path)

    @staticmethod
    def _load_yaml(config_path: Path) -> IslandingConfig:
        try:
            import yaml
        except ImportError:
            raise ImportError(
                "YAML support requires PyYAML. Install with: pip install PyYAML"
            )

        try:
            data = yaml.safe_load(config_path.read_text(encoding='utf-8'))
        except yaml.YAMLError as e:
            raise ValueError(
                f"Invalid YAML in config file: {e}. "
                f"File: {config_path}. "
                "Please check YAML syntax. Common issues: incorrect indentation, "
                "missing colons, tab characters (use spaces)."
            )
        return ConfigLoader._build(data or {}, config_path)

    @staticmethod
    def _build(data: Any, config_path: Path) -> IslandingConfig:
        if not isinstance(data, dict):
            raise ValueError(
                f"Config file must contain a mapping at the top level. File: {config_path}."
            )
        try:
            return IslandingConfig(**data)
        except ValueError as e:
            raise ValueError(
                f"Invalid settings in config file: {e}. "
                f"File: {config_path}. "
                "Run 'config example' to see every supported option."
            )

    @staticmethod
    def save(config: IslandingConfig, output_path: Union[str, Path], format: str = 'json') -> None:
        """Save configuration to file ('json' or 'yaml')."""
        output_path = Path(output_path)
        output_path.parent.mkdir(parents=True, exist_ok=True)

        data = config.model_dump(exclude_none=True, exclude_defaults=False)

        if format == 'json':
            output_path.write_text(json.dumps(data, indent=2) + "\n", encoding='utf-8')
        elif format in ['yaml', 'yml']:
            try:
                import yaml
            except ImportError:
                raise ImportError("YAML support requires PyYAML. Install with: pip install PyYAML")
            output_path.write_text(
                yaml.dump(data, default_flow_style=False, sort_keys=False), encoding='utf-8'
            )
        else:
            raise ValueError(f"Unsupported format: {format}")


class ConfigMerger:
    """Merge configuration from multiple sources with proper precedence."""

    @staticmethod
    def merge(
        config: IslandingConfig,
        cli_overrides: Dict[str, Any],
        case_name: Optional[str] = None
    ) -> Dict[str, Any]:
        """Flatten solver and flow settings and apply overrides.

        Precedence (highest to lowest):
        1. CLI arguments
        2. Case-specific settings
        3. Default settings in config file
        """
        merged = config.solver_settings.model_dump()
        merged.update(config.flow_settings.model_dump())

        if case_name and case_name in config.case_specific:
            case_data = config.case_specific[case_name].model_dump(exclude_none=True)
            merged.update(case_data)

        for key, value in cli_overrides.items():
            if value is not None:
                merged[key] = value

        return merged


def create_example_config(output_path: Union[str, Path], format: str = 'json') -> None:
    """Write an example configuration file ('json' or 'yaml')."""
    config = IslandingConfig(
        solver_settings=SolverSettings(
            granularity=1.0,
            correction=True,
            correction_min_buses=0,
            sigma_multiplier=1.0,
            oracle=False,
            oracle_max_buses=12,
            workers=4,
        ),
        flow_settings=FlowSettings(tolerance=1e-6, max_iterations=100),
        output_settings=OutputSettings(format="table", output_dir="artifacts", json_indent=2),
        case_specific={
            "ieee69": CaseSettings(faults=["3-4"], correction_min_buses=10),
            "feeder_b": CaseSettings(granularity=10.0, umin=0.93, umax=1.07),
        },
    )
    ConfigLoader.save(config, output_path, format=format)
