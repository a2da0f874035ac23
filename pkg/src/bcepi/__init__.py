"""B-cell epitope prediction from physicochemical descriptors with a numpy DNN."""

__version__ = "0.1.0"
