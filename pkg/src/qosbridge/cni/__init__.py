"""CNI executable contract: invocation parsing, command handlers, entry point."""
