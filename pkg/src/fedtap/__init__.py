"""fedtap: a deterministic federated-learning simulator with a covert channel
built on targeted model poisoning, plus channel metrics and server defenses."""

__version__ = "0.1.0"
