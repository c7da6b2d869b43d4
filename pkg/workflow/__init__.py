# Experiment workflows behind the command-line subcommands
