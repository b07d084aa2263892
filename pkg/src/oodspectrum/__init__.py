"""Human-centred OOD spectrum and behavioural error-alignment analysis."""

__version__ = "0.1.0"
