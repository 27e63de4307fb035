"""Visual-servoing pipeline for robotic nasal swabbing."""
__version__ = "0.1.0"
