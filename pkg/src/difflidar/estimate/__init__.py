"""Parameter estimation from range scans."""
