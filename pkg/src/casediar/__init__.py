"""Content-aware speaker embeddings for speaker diarisation."""

__version__ = "0.1.0"
