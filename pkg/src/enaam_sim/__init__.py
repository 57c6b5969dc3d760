"""Energy-harvesting BS site with co-located MEC server: simulator and controllers."""

__version__ = "0.1.0"
