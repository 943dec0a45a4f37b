from Core.Logger import logger

from Libraries.TimeFieldsLib import ConfigError

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_RUNTIME = 2


class ErrorHandler:
    ERR_TITLE = "TimeFieldsLab - Error"

    @staticmethod
    def handleError(message: str) -> None:
        logger.error(f"{ErrorHandler.ERR_TITLE}: {message}")

    @staticmethod
    def exitCodeFor(error: BaseException) -> int:
        return EXIT_USAGE if isinstance(error, ConfigError) else EXIT_RUNTIME
