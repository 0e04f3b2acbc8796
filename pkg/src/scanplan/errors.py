"""Exception hierarchy shared by every stage of the planner."""


class ScanPlanError(Exception):
    """Base class; ``stage`` names the pipeline stage that raised."""

    stage = "scanplan"


class ParseError(ScanPlanError, ValueError):
    stage = "load"

    def __init__(self, message, line=None, path=None):
        self.line = line
        self.path = path
        where = ""
        if path is not None:
            where += f"{path}"
        if line is not None:
            where += f":{line}"
        super().__init__(f"{where}: {message}" if where else message)


class EmptyCloudError(ScanPlanError, ValueError):
    stage = "load"


class DegenerateMeshError(ScanPlanError, ValueError):
    stage = "sample"


class InsufficientPointsError(ScanPlanError, ValueError):
    stage = "features"


class InvalidFeatureError(ScanPlanError, ValueError):
    stage = "segment"


class DegenerateRegionError(ScanPlanError, ValueError):
    stage = "localpath"


class InvalidPermutationError(ScanPlanError, ValueError):
    stage = "planner"


class EmptyInputError(ScanPlanError, ValueError):
    stage = "planner"


class SizeGuardError(ScanPlanError, ValueError):
    stage = "planner"


class UndefinedRateError(ScanPlanError, ValueError):
    stage = "coverage"


class ConfigError(ScanPlanError, ValueError):
    stage = "config"
