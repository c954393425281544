"""Scene files, built-in scenes, scan I/O and the command-line driver."""
