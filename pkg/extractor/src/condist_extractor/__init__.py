"""condist-extractor: turn raw text into CMVS mention-vector stores by
running a masked language model over sampled concept mentions."""

from .cmvs import write_cmvs
from .extract import DEFAULT_MODEL, extract, find_span

__version__ = "0.1.0"
