import logging
import os
from datetime import datetime
from typing import Optional

LOG_DIR = "Logs"
LOG_FORMAT = "%(asctime)s  [%(levelname)s]  %(message)s"
DATE_FORMAT = "%Y-%m-%d %H:%M:%S"

current_date = datetime.now().strftime("%Y-%m-%d")

logging.basicConfig(
    level=logging.INFO,
    #level=logging.DEBUG,
    format=LOG_FORMAT,
    datefmt=DATE_FORMAT,
    handlers=[
        logging.StreamHandler()
    ]
)

logger = logging.getLogger("TimeFieldsLab")


def attachRunLog(out_dir: str) -> Optional[logging.FileHandler]:
    """Adds a dated log file under <out_dir>/Logs; the library's module loggers propagate into it."""
    log_dir = os.path.join(out_dir, LOG_DIR)
    os.makedirs(log_dir, exist_ok=True)
    path = os.path.abspath(os.path.join(log_dir, f"TimeFieldsLab {current_date}.log"))
    root = logging.getLogger()
    for handler in root.handlers:
        if isinstance(handler, logging.FileHandler) and handler.baseFilename == path:
            return handler
    handler = logging.FileHandler(path, mode="a", encoding="utf-8")
    handler.setFormatter(logging.Formatter(LOG_FORMAT, DATE_FORMAT))
    root.addHandler(handler)
    return handler


def setVerbose(verbose: bool) -> None:
    logging.getLogger().setLevel(logging.DEBUG if verbose else logging.INFO)
