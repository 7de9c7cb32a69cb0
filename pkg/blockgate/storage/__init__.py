"""On-disk artifacts: the tensor file format, gate checkpoints and datasets."""
