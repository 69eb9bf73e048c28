import logging
import sys
import traceback

from app.exceptions import ConfigError, NumericalError, PaintError

# Configure logging
logging.basicConfig(
    level=logging.INFO,
    format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
    handlers=[
        logging.StreamHandler(sys.stdout)
    ]
)
logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3


def main(argv=None) -> int:
    from app.cli import dispatch, parse_args
    from app.config import settings

    args = parse_args(argv)
    level = (args.log_level or settings.log_level).upper()
    logging.getLogger().setLevel(getattr(logging, level, logging.INFO))

    try:
        return dispatch(args)
    except ConfigError as e:
        logger.error(f"Configuration error: {e}")
        return EXIT_CONFIG
    except NumericalError as e:
        logger.error(f"Numerical failure: {e}")
        return EXIT_NUMERICAL
    except PaintError as e:
        logger.error(f"{type(e).__name__}: {e}")
        return EXIT_FAILURE
    except Exception as e:
        logger.error(f"Unhandled exception: {str(e)}")
        logger.error(traceback.format_exc())
        return EXIT_FAILURE


if __name__ == "__main__":
    try:
        code = main()
    except ConfigError as e:
        # Settings validation runs on import (PAINT_THREADS)
        logger.error(f"Configuration error: {e}")
        code = EXIT_CONFIG
    sys.exit(code)
