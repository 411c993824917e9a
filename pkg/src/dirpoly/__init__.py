"""Direction-aware, polynomially expressive graph attention networks."""
from .graph import Dataset, DirectedGraph, Split, Task, build_graph, load_dataset, save_dataset, symmetrize
from .models import ModelSpec, PolyNetwork, build_model

__all__ = [
    "Dataset", "DirectedGraph", "Split", "Task", "build_graph", "load_dataset", "save_dataset",
    "symmetrize", "ModelSpec", "PolyNetwork", "build_model",
]
__version__ = "0.1.0"
