"""
Error taxonomy for the activity recognition pipeline.

Every error carries the process exit code and a short code string so the CLI
can print a single machine-parsable line.
"""


class PipelineError(Exception):
    """Base class for every failure the pipeline reports to the operator"""

    exit_code = 1
    code = "pipeline"


class ConfigError(PipelineError, ValueError):
    exit_code = 2
    code = "config"


class DataError(PipelineError, ValueError):
    exit_code = 3
    code = "data"


class SchemaError(DataError):
    code = "schema"

    def __init__(self, message, path=None, line=None):
        """
        Parameters:
        message (str): What is wrong with the record
        path (str): File the record came from
        line (int): 1-based line number inside that file
        """
        location = ""
        if path is not None:
            location = f"{path}"
            if line is not None:
                location += f":{line}"
            location += ": "
        super().__init__(f"{location}{message}")
        self.path = path
        self.line = line


class DegenerateFrameError(DataError):
    code = "degenerate_frame"


class ChecksumError(DataError):
    code = "checksum"


class VersionMismatchError(DataError):
    code = "version"


class ParameterMismatchError(DataError):
    code = "parameter_mismatch"


class TrainingError(PipelineError):
    exit_code = 4
    code = "training"


class NumericalError(TrainingError, FloatingPointError):
    code = "nan"


class MissingCheckpointError(TrainingError):
    code = "missing_checkpoint"


def format_error_line(error):
    """
    Render an error as the single line the CLI prints to stderr

    Parameters:
    error (PipelineError): Error to render

    Returns:
    str: 'error=<code> message=<text>' with newlines flattened
    """
    message = str(error).replace("\n", " ").strip()
    return f"error={error.code} message={message}"
