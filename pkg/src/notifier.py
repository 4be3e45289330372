"""Run notifications through Apprise."""

import apprise
import logging
from typing import List, Optional, Sequence

from models import CriterionResult

logger = logging.getLogger(__name__)

SUMMARY_LIMIT = 500
ERROR_LIMIT = 1000


def format_criterion(c: CriterionResult) -> str:
    """One line per criterion: verdict, name, value and threshold."""
    return f"{'PASS' if c.passed else 'FAIL'} {c.name}: {c.value:.3e} (threshold {c.threshold:.1e})"


class Notifier:
    """Wrapper for the Apprise notification library."""

    def __init__(self, urls: Optional[List[str]] = None):
        """Initialize notifier with Apprise URLs.

        Args:
            urls: List of Apprise URL strings
        """
        self.apobj = apprise.Apprise()
        self.urls = urls or []

        for url in self.urls:
            if url:
                self.apobj.add(url)

    def send(self, title: str, body: str, notify_type: str = 'info') -> bool:
        """Send a notification to all configured services.

        Args:
            title: Notification title
            body: Notification body
            notify_type: One of info, success, warning, failure

        Returns:
            True if the services accepted the notification or none are configured
        """
        if len(self.urls) == 0:
            logger.debug("No Apprise URLs configured, skipping notification")
            return True

        notify_map = {
            'info': apprise.NotifyType.INFO,
            'success': apprise.NotifyType.SUCCESS,
            'warning': apprise.NotifyType.WARNING,
            'failure': apprise.NotifyType.FAILURE,
        }
        atype = notify_map.get(notify_type, apprise.NotifyType.INFO)

        try:
            result = self.apobj.notify(title=title, body=body, notify_type=atype)
            if result:
                logger.info(f"Notification sent successfully: {title}")
            else:
                logger.error(f"Failed to send notification: {title}")
            return result
        except Exception as e:
            logger.error(f"Error sending notification: {e}")
            return False

    def send_run_success(self, name: str, duration: float, criteria: Sequence[CriterionResult],
                         include_output: bool = True) -> bool:
        """Report an experiment whose criteria all passed.

        Args:
            name: Experiment name
            duration: Run time in seconds
            criteria: Criteria recorded by the run
            include_output: Whether to list every criterion with its margin
        """
        title = f"✓ Experiment Passed: {name}"
        body = f"Experiment '{name}' passed {len(criteria)} criteria in {duration:.2f}s"
        if include_output and criteria:
            lines = "\n".join(format_criterion(c) for c in criteria)
            body += f"\n\nCriteria:\n{lines[:SUMMARY_LIMIT]}"
        return self.send(title, body, 'success')

    def send_run_failure(self, name: str, criteria: Sequence[CriterionResult], error: Optional[str] = None,
                         duration: Optional[float] = None, include_output: bool = True) -> bool:
        """Report failing criteria or a crashed experiment.

        The title names the failing criteria; the body lists their values
        against the thresholds, or the exception text when the run crashed.

        Args:
            name: Experiment name
            criteria: Criteria recorded before the run ended
            error: Exception text of a crashed run
            duration: Run time in seconds before the failure
            include_output: Whether to append the details
        """
        failing = [c for c in criteria if not c.passed]
        title = f"✗ Experiment Failed: {name}"
        if failing:
            title += f" ({', '.join(c.name for c in failing)})"
        body = f"Experiment '{name}' failed"
        if duration is not None:
            body += f" after {duration:.2f}s"
        if error is not None:
            body += f" with {error.split(':', 1)[0]}"
        elif criteria:
            body += f": {len(failing)} of {len(criteria)} criteria above threshold"
        else:
            body += ": no criteria recorded"
        if include_output:
            details = error if error is not None else "\n".join(format_criterion(c) for c in failing)
            if details:
                body += f"\n\nDetails:\n{details[:ERROR_LIMIT]}"
        return self.send(title, body, 'failure')
