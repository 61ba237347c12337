"""Risk versus computation trade-offs for budgeted statistical estimators."""
from .cost import Allocation, Category, CostLedger, CostUnit, GeneralAllocation

__version__ = "0.1.0"

__all__ = ["Allocation", "Category", "CostLedger", "CostUnit", "GeneralAllocation", "__version__"]
