"""
Evaluation: matching, FROC analysis, report files and overlays
"""
from .froc import EvalConfig, EvalReport, FrocPoint, iou, match_detections, froc, sensitivity_at
from .report import evaluate_detections, collect_detections, write_report_files
