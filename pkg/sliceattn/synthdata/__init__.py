"""
Synthetic CT-like phantom data sets
"""
from .phantom import PhantomSpec, Sample, generate, generate_sample
from .strata import Criteria, stratify
from .volumefile import write_dataset, read_dataset, read_volume, write_volume
