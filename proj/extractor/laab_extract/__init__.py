from .extract import Job, run
from .pack import RawPackWriter, RawRecord, derive_lj, quantile_layers
from .prompts import collapse_verdict, segment_boundaries, synonym_ids
