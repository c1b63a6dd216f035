"""Configuration management for the RepQuant toolkit."""

import os
from typing import Any, Dict, Optional
from pathlib import Path

try:
    from dotenv import load_dotenv
    DOTENV_AVAILABLE = True
except ImportError:
    DOTENV_AVAILABLE = False

from src.models.quant_config import QuantConfig
from src.utils.validators import ValidationError

# config key -> (environment variable, parser)
QUANT_KEYS = {
    'weight_bits': ('REPQUANT_WEIGHT_BITS', int),
    'act_bits': ('REPQUANT_ACT_BITS', int),
    'percentile': ('REPQUANT_PERCENTILE', float),
    'clip_iters': ('REPQUANT_CLIP_ITERS', int),
    'clip_lr': ('REPQUANT_CLIP_LR', float),
    'clip_init': ('REPQUANT_CLIP_INIT', float),
    'clip_method': ('REPQUANT_CLIP_METHOD', str),
    'softmax_base': ('REPQUANT_SOFTMAX_BASE', str),
    'calib_size': ('REPQUANT_CALIB_SIZE', int),
    'seed': ('REPQUANT_SEED', int),
    'prefix_mode': ('REPQUANT_PREFIX_MODE', str),
}
ENV_VARS = {key: env_var for key, (env_var, _) in QUANT_KEYS.items()}
ENV_VARS['output_directory'] = 'REPQUANT_OUTPUT_DIR'


class Config:
    """Configuration manager for toolkit settings."""

    def __init__(self, config_file: Optional[str] = None):
        """Initialize configuration manager.

        Args:
            config_file: Optional path to configuration file
        """
        self.config_file = config_file or self._get_default_config_path()
        self._config: Dict[str, Optional[str]] = {}
        self._load_dotenv()
        self._load_config()

    def _get_default_config_path(self) -> str:
        """Get default configuration file path."""
        return str(Path.home() / ".repquant" / "config.txt")

    def _load_dotenv(self) -> None:
        """Load environment variables from the first .env file found."""
        if not DOTENV_AVAILABLE:
            return

        dotenv_paths = [
            Path.cwd() / ".env",
            Path(__file__).parent.parent.parent / ".env",
            Path.home() / ".env"
        ]

        for dotenv_path in dotenv_paths:
            if dotenv_path.exists():
                load_dotenv(dotenv_path, override=False)  # existing env vars win
                break

    def _load_config(self) -> None:
        """Load configuration from environment variables, then the config file."""
        self._config = {
            'output_directory': os.getenv('REPQUANT_OUTPUT_DIR', 'output'),
        }
        for key, (env_var, _) in QUANT_KEYS.items():
            value = os.getenv(env_var)
            if value is not None:
                self._config[key] = value

        # the file fills in keys the environment left unset
        if os.path.exists(self.config_file):
            try:
                with open(self.config_file, 'r', encoding='utf-8') as f:
                    for line in f:
                        line = line.strip()
                        if line and not line.startswith('#') and '=' in line:
                            key, value = line.split('=', 1)
                            key = key.strip()
                            if os.getenv(ENV_VARS.get(key, "")) is None:
                                self._config[key] = value.strip()
            except (OSError, IOError):
                pass  # unreadable config file: keep environment values

    def get_output_directory(self) -> str:
        """Get output directory path.

        Returns:
            Output directory path
        """
        return self.get_config('output_directory') or 'output'

    def get_config(self, key: str, default: Optional[str] = None) -> Optional[str]:
        """Get a configuration value by key.

        Args:
            key: Configuration key
            default: Default value if key not found

        Returns:
            Configuration value or default
        """
        return self._config.get(key, default)

    def get_quant_config(self, **overrides: Any) -> QuantConfig:
        """Build a QuantConfig: overrides, then configured values, then defaults.

        Args:
            **overrides: QuantConfig fields; None values are ignored

        Returns:
            Validated QuantConfig

        Raises:
            ValidationError: If a configured value cannot be parsed or is invalid
        """
        values: Dict[str, Any] = {}
        for key, (env_var, parse) in QUANT_KEYS.items():
            raw = self.get_config(key)
            if raw is None or raw == '':
                continue
            try:
                values[key] = parse(raw)
            except ValueError:
                raise ValidationError(f"Invalid value for {key} ({env_var}): {raw!r}")
        values.update({k: v for k, v in overrides.items() if v is not None})
        return QuantConfig.from_dict(values)


_config_instance = None


def get_config() -> Config:
    """Get global configuration instance.

    Returns:
        Global Config instance
    """
    global _config_instance
    if _config_instance is None:
        _config_instance = Config()
    return _config_instance
