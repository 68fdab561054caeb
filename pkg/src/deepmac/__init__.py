"""Composable 802.11-style MAC protocols, a shared-channel simulator and a DQN block selector."""

__version__ = "0.1.0"
