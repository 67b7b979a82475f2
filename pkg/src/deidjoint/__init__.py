"""Joint de-identification and clinical concept extraction with BiLSTM-CRF taggers."""

__version__ = "0.1.0"
