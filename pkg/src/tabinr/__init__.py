"""TabINR: tabular imputation with an implicit neural representation."""

from .model import TabInrModel, TrainConfig, impute, load_model, save_model, train
from .table import EncodedTable, TableSchema, fit_scaling, hide_cells, load_table
from .tta import PartialRow, TtaConfig, adapt_row, impute_row

__version__ = "0.1.0"

__all__ = [
    "EncodedTable", "PartialRow", "TabInrModel", "TableSchema", "TrainConfig", "TtaConfig",
    "adapt_row", "fit_scaling", "hide_cells", "impute", "impute_row", "load_model", "load_table",
    "save_model", "train",
]
