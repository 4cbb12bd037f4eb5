"""Touch-based 6-DOF object localization."""
__version__ = "0.1.0"
