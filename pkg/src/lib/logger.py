import logging
import os

# LogRecord가 기본으로 갖는 속성들 (extra 필드와 구분하기 위해 사용)
_STANDARD_ATTRS = frozenset(
    logging.LogRecord("", logging.INFO, "", 0, "", None, None).__dict__
) | {"message", "asctime", "taskName"}

LOG_LEVEL_ENV = "SAGE_OPT_LOG_LEVEL"


class ExtraFieldFormatter(logging.Formatter):
    """Formatter that appends `extra=` fields (step, S, beta, ...) to the line."""

    def format(self, record: logging.LogRecord) -> str:
        formatted = super().format(record)

        extras = {
            k: v
            for k, v in record.__dict__.items()
            if k not in _STANDARD_ATTRS and not k.startswith("_") and v is not None
        }
        if extras:
            # 키 순서로 정렬해 출력이 항상 같도록 유지
            extra_parts = ", ".join(f"{k}={_short(v)}" for k, v in sorted(extras.items()))
            formatted = f"{formatted} | extra: {extra_parts}"
        return formatted


def _short(value) -> str:
    if isinstance(value, float):
        return f"{value:.6g}"
    return repr(value)


def _level_from_env(default: int) -> int:
    raw = os.environ.get(LOG_LEVEL_ENV)
    if not raw:
        return default
    level = logging.getLevelName(raw.strip().upper())
    return level if isinstance(level, int) else default


def setup_logger(name: str, level: int = logging.INFO) -> logging.Logger:
    """Set up and return a logger with the specified name.

    The level can be overridden with the SAGE_OPT_LOG_LEVEL environment
    variable. Fields passed via `extra` are rendered after the message, e.g.
    LOGGER.debug("step", extra={"step": 3, "beta": 0.02}).
    """

    level = _level_from_env(level)
    logger = logging.getLogger(name)
    logger.setLevel(level)

    if not logger.hasHandlers():
        ch = logging.StreamHandler()
        ch.setLevel(level)
        ch.setFormatter(
            ExtraFieldFormatter("%(asctime)s - %(name)s - %(levelname)s - %(message)s")
        )
        logger.addHandler(ch)
        # 상위 로거로 전파되면 같은 줄이 두 번 찍힘
        logger.propagate = False

    return logger
