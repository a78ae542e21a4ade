"""GRU recurrent network with an L2-SVM (or Softmax) output layer for binary
intrusion detection on network traffic logs."""

__version__ = "0.1.0"
