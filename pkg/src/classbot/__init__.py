"""class-bot: nudges students through the software development process.

The bot assesses student repositories against a phase-by-phase rubric and keeps
one progress issue per repository up to date. A companion pipeline mines
productivity metrics from git history and compares groups with the
Mann-Whitney-Wilcoxon test.
"""

__version__ = "0.1.0"
