"""rulehive: agents that privately own a forward-chaining rule engine and
coordinate it through speech-act messages, without ever blocking their own
message loop."""

__version__ = "0.1.0"
