"""Thermographic inspection toolkit: sequence reduction, defect localisation and evaluation."""
from .errors import AirtError, FormatError, NumericError, ProtocolError, TransportError
from .seqcore import (
    BBox,
    InspectionSequence,
    RoiLabels,
    StandardizedSequence,
    extract_roi_stats,
    read_sequence,
    standardize,
    write_sequence,
)

__version__ = "0.1.0"
