"""Decision-tree treebank parser: trainable statistical models over a
five-feature parse-tree decomposition, decoded with a stack search."""

__version__ = "0.1.0"
