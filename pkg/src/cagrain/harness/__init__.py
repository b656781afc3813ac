"""Command line, scenario files and the experiment presets."""
