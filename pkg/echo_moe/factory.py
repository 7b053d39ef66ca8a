"""
Instruction generator factory and run-configuration helpers.

Generators are registered by name; third-party generators are discovered through
the ``echo_moe.generators`` entry-point group. Run configurations come from
JSON files and environment variables.
"""

import inspect
import json
import logging
import os
from collections.abc import Mapping
from importlib.metadata import entry_points
from pathlib import Path
from typing import Any

try:
    from dotenv import load_dotenv

    DOTENV_AVAILABLE = True
except ImportError:
    DOTENV_AVAILABLE = False

from pydantic import ValidationError

from .base import CONFIG_CLASSES, BaseInstructionGenerator, EchoConfig, RunConfig
from .exceptions import ConfigurationError, GeneratorNotFoundError, SerializationError
from .textpipe.generation import EchoTemplateGenerator

logger = logging.getLogger(__name__)

ENV_PREFIX = "ECHO_MOE_"
SEED_ENV = "ECHO_MOE_SEED"
ENTRY_POINT_GROUP = "echo_moe.generators"
CONFIG_ECHO_SUFFIX = ".config.json"


class InstructionGeneratorFactory:
    """Factory for creating instruction generator instances."""

    def __init__(self, auto_discover: bool = True, load_env: bool = True):
        """Initialize the factory with the built-in generators.

        Args:
            auto_discover: Automatically discover generators via entry points
            load_env: Load environment variables from .env file
        """
        self._generators: dict[str, type[BaseInstructionGenerator]] = {}
        self._config_types: dict[str, type[EchoConfig]] = CONFIG_CLASSES.copy()

        if load_env and DOTENV_AVAILABLE:
            load_dotenv()
            logger.debug("Loaded environment variables from .env")

        self.register_generator(EchoTemplateGenerator.name, EchoTemplateGenerator)
        if auto_discover:
            self.discover_generators()

    def register_generator(
        self, name: str, generator_class: type[BaseInstructionGenerator]
    ) -> None:
        """Register an instruction generator implementation.

        Raises:
            ConfigurationError: If the class does not implement BaseInstructionGenerator
        """
        if not inspect.isclass(generator_class):
            raise ConfigurationError(f"Generator must be a class, got {type(generator_class)}")
        if not issubclass(generator_class, BaseInstructionGenerator):
            raise ConfigurationError(
                f"Generator class must inherit from BaseInstructionGenerator, "
                f"got {generator_class.__name__}"
            )
        self._generators[name] = generator_class

    def unregister_generator(self, name: str) -> None:
        """Remove a generator; unknown names are ignored."""
        self._generators.pop(name, None)

    def discover_generators(self) -> None:
        """Discover and register generators via entry points."""
        try:
            eps = entry_points()
            if hasattr(eps, "select"):
                entries = eps.select(group=ENTRY_POINT_GROUP)
            else:
                entries = eps.get(ENTRY_POINT_GROUP, [])

            for ep in entries:
                try:
                    self.register_generator(ep.name, ep.load())
                    logger.debug(f"Discovered generator via entry point: {ep.name}")
                except Exception as e:
                    logger.warning(f"Failed to load generator entry point {ep.name}: {e}")
        except Exception as e:
            logger.warning(f"Generator discovery failed: {e}")

    def list_generators(self) -> dict[str, str]:
        """Map generator names to class names."""
        return {name: cls.__name__ for name, cls in self._generators.items()}

    def get_generator_class(self, name: str) -> type[BaseInstructionGenerator]:
        """
        Raises:
            GeneratorNotFoundError: If no generator is registered under ``name``
        """
        if name not in self._generators:
            raise GeneratorNotFoundError(
                f"Generator '{name}' not found. Available generators: {list(self._generators)}"
            )
        return self._generators[name]

    def create_generator(self, name: str, **options: Any) -> BaseInstructionGenerator:
        """Instantiate a registered generator.

        Raises:
            GeneratorNotFoundError: If the name is not registered
            ConfigurationError: If the generator rejects its options
        """
        generator_class = self.get_generator_class(name)
        try:
            return generator_class(**options)
        except TypeError as e:
            raise ConfigurationError(f"Failed to create {name} generator: {e}") from e

    def create_config(self, kind: str, **kwargs: Any) -> EchoConfig:
        """Create one of the configuration models by short name ('model', 'train', ...).

        Raises:
            ConfigurationError: If the kind is unknown or the values are invalid
        """
        if kind not in self._config_types:
            raise ConfigurationError(
                f"Unknown configuration '{kind}'. Available: {list(self._config_types)}"
            )
        try:
            return self._config_types[kind](**kwargs)
        except ValidationError as e:
            raise ConfigurationError(f"Invalid {kind} configuration: {e}") from e

    def create_run_config_from_env(
        self, base: RunConfig | None = None, **overrides: Any
    ) -> RunConfig:
        """Apply ``ECHO_MOE_<FIELD>`` variables to the top-level run settings.

        ``ECHO_MOE_SEED`` overrides the seed; explicit overrides win over the environment.

        Raises:
            ConfigurationError: If a value does not validate
        """
        values = (base or RunConfig()).model_dump(exclude_unset=True)
        for field_name in ("seed", "output_dir", "debug"):
            env_value = os.getenv(f"{ENV_PREFIX}{field_name.upper()}")
            if env_value is not None:
                values[field_name] = env_value
        values.update(overrides)
        try:
            config = RunConfig.model_validate(values)
        except ValidationError as e:
            raise ConfigurationError(f"Invalid run configuration from environment: {e}") from e
        if os.getenv(SEED_ENV) is not None:
            logger.info(f"Seed {config.seed} taken from {SEED_ENV}")
        return config


def load_run_config(path: str | Path | None = None) -> RunConfig:
    """Load a JSON run configuration; ``None`` gives the defaults.

    Raises:
        ConfigurationError: If the file cannot be read or does not validate
    """
    if path is None:
        return RunConfig()
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, UnicodeDecodeError, json.JSONDecodeError) as e:
        raise ConfigurationError(f"Cannot read configuration file {path}: {e}") from e
    try:
        return RunConfig.model_validate(data)
    except ValidationError as e:
        raise ConfigurationError(f"Invalid configuration in {path}: {e}") from e


def config_echo_path(path: str | Path) -> Path:
    """Sidecar next to ``path`` holding the configuration that produced it."""
    target = Path(path)
    return target.with_name(target.name + CONFIG_ECHO_SUFFIX)


def write_config_echo(path: str | Path, echo: Mapping[str, Any]) -> Path:
    """
    Write the configuration echo of an output whose format has no room for a header.

    Raises:
        SerializationError: If the sidecar cannot be written
    """
    out = config_echo_path(path)
    try:
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(json.dumps(dict(echo), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    except OSError as e:
        raise SerializationError(f"Failed to write configuration echo {out}: {e}") from e
    logger.debug(f"Wrote configuration echo {out}")
    return out


def read_config_echo(path: str | Path) -> dict[str, Any]:
    """
    Read the configuration echo written next to ``path``.

    Raises:
        ConfigurationError: If the sidecar is missing or not JSON
    """
    src = config_echo_path(path)
    try:
        return json.loads(src.read_text(encoding="utf-8"))
    except (OSError, UnicodeDecodeError, json.JSONDecodeError) as e:
        raise ConfigurationError(f"Cannot read configuration echo {src}: {e}") from e


# Global factory instance
factory = InstructionGeneratorFactory()


def register_generator(name: str, generator_class: type[BaseInstructionGenerator]) -> None:
    """Register a generator in the global factory."""
    factory.register_generator(name, generator_class)


def create_generator(name: str, **options: Any) -> BaseInstructionGenerator:
    """Create a generator using the global factory."""
    return factory.create_generator(name, **options)


def create_config(kind: str, **kwargs: Any) -> EchoConfig:
    """Create a configuration model using the global factory."""
    return factory.create_config(kind, **kwargs)


def list_generators() -> dict[str, str]:
    """List generators registered in the global factory."""
    return factory.list_generators()


def create_run_config_from_env(base: RunConfig | None = None, **overrides: Any) -> RunConfig:
    """Apply environment overrides using the global factory."""
    return factory.create_run_config_from_env(base, **overrides)


__all__ = [
    "InstructionGeneratorFactory",
    "factory",
    "register_generator",
    "create_generator",
    "create_config",
    "list_generators",
    "create_run_config_from_env",
    "load_run_config",
    "config_echo_path",
    "write_config_echo",
    "read_config_echo",
]
