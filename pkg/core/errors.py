# Error hierarchy for the forecasting pipeline

from typing import Any, Dict, List, Optional, Sequence, Tuple


class ChargeCastError(Exception):
    """Base class for every error raised by the pipeline"""

    exit_code = 1

    def to_dict(self) -> Dict[str, Any]:
        return {"error": type(self).__name__, "message": str(self)}


class InputError(ChargeCastError):
    """Bad input data, configuration or structure (exit code 2)"""

    exit_code = 2


class NumericError(ChargeCastError):
    """Numerical failure during optimization (exit code 3)"""

    exit_code = 3


class DatasetParseError(InputError):
    def __init__(self, path: str, row: Optional[int], column: Optional[str], detail: str):
        self.path = path
        self.row = row
        self.column = column
        location = []
        if row is not None:
            location.append(f"row {row}")
        if column is not None:
            location.append(f"column '{column}'")
        where = f" at {', '.join(location)}" if location else ""
        super().__init__(f"{path}: cannot parse{where}: {detail}")


class OccupancyRangeError(InputError):
    """Occupancy values outside [0, 1]; offenders are (position, area, value)

    The position counts from 1 in the given unit: data rows of a time-by-area
    file, time steps otherwise.
    """

    def __init__(self, path: str, offenders: Sequence[Tuple[int, str, float]], limit: int = 10,
                 unit: str = "row"):
        self.path = path
        self.offenders = list(offenders)
        self.unit = unit
        shown = ", ".join(f"{unit} {r} area '{a}' = {v:g}" for r, a, v in self.offenders[:limit])
        more = f" (+{len(self.offenders) - limit} more)" if len(self.offenders) > limit else ""
        super().__init__(f"{path}: occupancy outside [0, 1]: {shown}{more}")


class AlignmentError(InputError):
    pass


class InsufficientDataError(InputError):
    pass


class EmptyBatchError(InputError):
    pass


class ConfigError(InputError):
    pass


class DegenerateAreaError(InputError):
    def __init__(self, areas: List[str]):
        self.areas = list(areas)
        super().__init__(f"areas with zero POIs: {', '.join(self.areas)}")


class AreaReferenceError(InputError):
    pass


class StructureError(InputError):
    pass


class ShapeError(InputError):
    pass


class DomainError(InputError):
    pass


class EmptyNeighborhoodError(InputError):
    pass


class CheckpointError(InputError):
    pass


class ShapeAuditError(CheckpointError):
    def __init__(self, mismatches: List[str]):
        self.mismatches = list(mismatches)
        super().__init__("parameter inventory does not match config: " + "; ".join(self.mismatches))


class UnknownVariantError(InputError):
    pass


class NonFiniteGradientError(NumericError):
    def __init__(self, tensor_name: str, step: Optional[int] = None):
        self.tensor_name = tensor_name
        self.step = step
        at = f" at step {step}" if step is not None else ""
        super().__init__(f"non-finite gradient in '{tensor_name}'{at}")


class TrainingDivergedError(NumericError):
    def __init__(self, epoch: int, last_good_epoch: Optional[int], detail: str = "loss is NaN"):
        self.epoch = epoch
        self.last_good_epoch = last_good_epoch
        super().__init__(
            f"training diverged at epoch {epoch} ({detail}); last good epoch: {last_good_epoch}"
        )
