"""Exception types shared across modules."""


class ConfigError(ValueError):
    """Invalid configuration value; ``field`` names the offending key."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field
