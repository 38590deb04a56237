"""semfuzz: coverage-guided fuzzing with an asynchronous LLM mutation service."""

__version__ = "0.1.0"
