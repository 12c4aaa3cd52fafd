"""mmWave downlink simulator with learned scheduling and link configuration."""
__version__ = "0.1.0"
