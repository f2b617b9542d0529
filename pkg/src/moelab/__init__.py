"""Desk-scale laboratory for variance-gated mixtures of imitation and
reinforcement learning experts: tiny 2D manipulation environments, a
numpy neural kit, three-way replay routing, offline pre-training, online
fine-tuning with interventions, and a live session protocol."""

__version__ = "0.1.0"
