"""Config-driven experiment harness and CLI."""
