"""Binary-jump hierarchies on a torus grid."""
__version__ = "0.1.0"
