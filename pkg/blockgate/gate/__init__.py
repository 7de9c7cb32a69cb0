"""The learnable attention gate and its self-distillation trainer."""
