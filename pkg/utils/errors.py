class PipelineError(Exception):
    """
    Base class for failures the command line reports with a dedicated exit code.
    """
    exit_code = 1


class ConfigError(PipelineError):
    exit_code = 2


class MissingPrerequisiteError(PipelineError):
    exit_code = 3


class IntegrityError(PipelineError):
    exit_code = 4


class WorkspaceLockedError(PipelineError):
    exit_code = 1
