"""UAV strip-transect wildlife census toolkit."""

__version__ = "0.1.0"
