"""pdmkit: forecasting-based anomaly detection and transferable defect classifiers for sensor data."""

__version__ = "0.1.0"
