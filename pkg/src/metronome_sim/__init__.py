"""Sleep&wake multi-threaded packet retrieval: closed-form model and discrete-event simulator."""

__version__ = "0.1.0"
