"""Logfire configuration for eecap.

Spans are exported only when a Logfire token is available; without one the
configuration still succeeds and spans stay local.
"""

import logging

import logfire

from eecap import __version__
from eecap.config import settings

logger = logging.getLogger(__name__)

# Flag to track configuration state
_logfire_configured = False
_logfire_active = False


def configure_logfire(send_to_logfire: bool | str | None = 'if-token-present') -> bool:
    """
    Configure Logfire for the eecap service.

    Args:
        send_to_logfire: If 'if-token-present', only export when a token is present.
                        If False, never export.
                        If True, always export (requires authentication).

    Returns:
        True if Logfire was configured successfully, False otherwise.
    """
    global _logfire_configured, _logfire_active

    if _logfire_configured:
        return _logfire_active

    if not settings.enable_logfire:
        logger.info("Logfire is disabled via configuration (EECAP_ENABLE_LOGFIRE=false)")
        _logfire_configured = True
        _logfire_active = False
        return False

    try:
        logfire.configure(
            service_name="eecap",
            service_version=__version__,
            environment=settings.environment,
            send_to_logfire=send_to_logfire,
            token=settings.logfire_token or None,
            # Results go to stdout; keep spans off the console
            console=False,
        )
        _logfire_active = True
        logger.info("Logfire configured successfully")
    except Exception as e:
        logger.warning(f"Failed to configure Logfire: {e}. Continuing without Logfire.")
        _logfire_active = False

    _logfire_configured = True
    return _logfire_active


def is_logfire_enabled() -> bool:
    """Check if Logfire is enabled and configured."""
    return _logfire_configured and _logfire_active and settings.enable_logfire
