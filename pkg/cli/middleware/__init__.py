# Middleware initialization

import logging
import sys
import time
from functools import wraps

from pydantic import ValidationError

from core.errors import ChargeCastError

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_INPUT = 2
EXIT_NUMERIC = 3


def report_error(message: str) -> None:
    """Human-readable report on stderr"""
    logger.error(message)
    print(f"error: {message}", file=sys.stderr)


def handle_errors(f):
    """Map exceptions to the exit-code contract"""
    @wraps(f)
    def decorated(*args, **kwargs):
        try:
            return f(*args, **kwargs)
        except ChargeCastError as e:
            report_error(str(e))
            return e.exit_code
        except ValidationError as e:
            details = "; ".join(
                f"{'.'.join(str(p) for p in err['loc']) or 'config'}: {err['msg']}" for err in e.errors()
            )
            report_error(f"invalid configuration: {details}")
            return EXIT_INPUT
        except (FileNotFoundError, PermissionError) as e:
            report_error(str(e))
            return EXIT_INPUT
    return decorated


def command_logger(f):
    """Log command start, exit code and elapsed time"""
    @wraps(f)
    def decorated(*args, **kwargs):
        start_time = time.time()
        logger.info(f"Command: {f.__name__} started")
        code = f(*args, **kwargs)
        diff = time.time() - start_time
        logger.info(f"Command: {f.__name__} exit {code} - {diff:.4f}s")
        return code
    return decorated


def setup_middleware(f):
    """Wrap a command handler with all middleware"""
    return command_logger(handle_errors(f))
