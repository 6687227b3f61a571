class ConfigurationError(ValueError):
    """Raised when a model, controller, or scenario is built from inconsistent
    or out-of-range parameters. The message names the offending field."""
