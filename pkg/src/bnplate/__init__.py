"""Bengali license plate recognition: detect, segment, recognize, parse."""
from .geometry import BBox, Detection, EvalReport, average_precision, giou, iou, nms
from .grammar import Grammar, PlateParseError, PlateRecord, format_plate, parse_plate

__version__ = "0.1.0"
