"""Trainable networks: speaker embedder, VAD and change-point detector."""
