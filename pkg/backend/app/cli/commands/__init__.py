from app.cli.commands import diagnose, evaluate, plot, reconstruct, simulate, train

COMMANDS = {module.NAME: module for module in (simulate, train, reconstruct, evaluate, diagnose, plot)}

__all__ = ["COMMANDS"]
