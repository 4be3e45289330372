"""Tests for Notifier."""

import pytest
from unittest.mock import MagicMock, patch
import apprise

from models import CriterionResult
from notifier import ERROR_LIMIT, SUMMARY_LIMIT, Notifier, format_criterion

PASSING = CriterionResult(name="transport-residual", value=1e-3, threshold=5e-2, passed=True)
PASSING_LINEAR = CriterionResult(name="transport-linear", value=1e-9, threshold=1e-6, passed=True)
FAILING = CriterionResult(name="dn", value=3e-2, threshold=1e-2, passed=False)


@pytest.fixture
def patched_apprise():
    """Patch Apprise and yield the mocked instance."""
    with patch('notifier.apprise.Apprise') as MockApprise:
        mock_apobj = MagicMock()
        mock_apobj.notify.return_value = True
        MockApprise.return_value = mock_apobj
        yield mock_apobj


class TestNotifier:
    """Tests for Notifier class."""

    def test_init_with_urls(self, patched_apprise):
        """Test Notifier initialization with URLs."""
        notifier = Notifier(["discord://test/test", "telegram://token/chat"])

        assert len(notifier.urls) == 2
        assert patched_apprise.add.call_count == 2

    def test_init_without_urls(self, patched_apprise):
        """Test Notifier initialization without URLs."""
        notifier = Notifier()

        assert notifier.urls == []
        patched_apprise.add.assert_not_called()

    def test_init_filters_empty_urls(self, patched_apprise):
        """Test Notifier filters out empty URL strings."""
        Notifier(["discord://test/test", "", None, "telegram://token/chat"])

        # Should only add non-empty URLs
        assert patched_apprise.add.call_count == 2

    def test_send_success(self, patched_apprise):
        """Test successful notification sending."""
        notifier = Notifier(["discord://test/test"])
        result = notifier.send("Test Title", "Test Body", "info")

        assert result is True
        patched_apprise.notify.assert_called_once()
        call_args = patched_apprise.notify.call_args
        assert call_args.kwargs['title'] == "Test Title"
        assert call_args.kwargs['body'] == "Test Body"
        assert call_args.kwargs['notify_type'] == apprise.NotifyType.INFO

    def test_send_failure(self, patched_apprise):
        """Test failed notification sending."""
        patched_apprise.notify.return_value = False
        notifier = Notifier(["discord://test/test"])

        assert notifier.send("Test Title", "Test Body") is False

    def test_send_no_urls_configured(self, patched_apprise):
        """Test sending notification with no URLs configured."""
        notifier = Notifier([])
        result = notifier.send("Test Title", "Test Body")

        # Should return True (success) when no URLs configured
        assert result is True
        patched_apprise.notify.assert_not_called()

    @pytest.mark.parametrize("notify_type,expected_apprise_type", [
        ("info", apprise.NotifyType.INFO),
        ("success", apprise.NotifyType.SUCCESS),
        ("warning", apprise.NotifyType.WARNING),
        ("failure", apprise.NotifyType.FAILURE),
        ("unknown_type", apprise.NotifyType.INFO),
    ])
    def test_send_notification_types(self, patched_apprise, notify_type, expected_apprise_type):
        """Test notification types are mapped correctly, unknown ones to INFO."""
        notifier = Notifier(["discord://test/test"])
        notifier.send("Test", "Body", notify_type)

        call_args = patched_apprise.notify.call_args
        assert call_args.kwargs['notify_type'] == expected_apprise_type

    def test_send_exception_handling(self, patched_apprise):
        """Test exception handling during notification send."""
        patched_apprise.notify.side_effect = Exception("Network error")
        notifier = Notifier(["discord://test/test"])

        assert notifier.send("Test", "Body") is False

    def test_send_run_success_lists_criteria(self, patched_apprise):
        """Test the success notification lists every criterion with value and threshold."""
        notifier = Notifier(["discord://test/test"])
        notifier.send_run_success("identity-transport", 12.5, [PASSING, PASSING_LINEAR], True)

        call_args = patched_apprise.notify.call_args
        assert "identity-transport" in call_args.kwargs['title']
        assert "Passed" in call_args.kwargs['title']
        body = call_args.kwargs['body']
        assert "passed 2 criteria in 12.50s" in body
        assert "PASS transport-residual: 1.000e-03 (threshold 5.0e-02)" in body
        assert "PASS transport-linear" in body
        assert call_args.kwargs['notify_type'] == apprise.NotifyType.SUCCESS

    def test_send_run_success_without_output(self, patched_apprise):
        """Test that the criteria are omitted when include_output is False."""
        notifier = Notifier(["discord://test/test"])
        notifier.send_run_success("dn", 5.0, [PASSING], False)

        body = patched_apprise.notify.call_args.kwargs['body']
        assert "passed 1 criteria" in body
        assert "transport-residual" not in body

    def test_send_run_success_truncation(self, patched_apprise):
        """Test the criteria list is truncated to the summary limit."""
        many = [CriterionResult(name=f"c{i}", value=0.0, threshold=1.0, passed=True) for i in range(50)]
        notifier = Notifier(["discord://test/test"])
        notifier.send_run_success("dn", 1.0, many, True)

        body = patched_apprise.notify.call_args.kwargs['body']
        lines = "\n".join(format_criterion(c) for c in many)
        assert lines[:SUMMARY_LIMIT] in body
        assert lines[:SUMMARY_LIMIT + 1] not in body

    def test_send_run_failure_names_failing_criteria(self, patched_apprise):
        """Test the failure notification names the failing criteria and their margins."""
        notifier = Notifier(["discord://test/test"])
        notifier.send_run_failure("thm3", [PASSING, FAILING], None, 8.3, True)

        call_args = patched_apprise.notify.call_args
        assert call_args.kwargs['title'] == "✗ Experiment Failed: thm3 (dn)"
        body = call_args.kwargs['body']
        assert "after 8.30s: 1 of 2 criteria above threshold" in body
        assert "FAIL dn: 3.000e-02 (threshold 1.0e-02)" in body
        assert "transport-residual" not in body
        assert call_args.kwargs['notify_type'] == apprise.NotifyType.FAILURE

    def test_send_run_failure_with_error(self, patched_apprise):
        """Test a crashed run reports the exception instead of criteria."""
        notifier = Notifier(["discord://test/test"])
        notifier.send_run_failure("thm3", [], "TrappedGeodesic: 3 geodesic(s)", 2.0, True)

        call_args = patched_apprise.notify.call_args
        assert call_args.kwargs['title'] == "✗ Experiment Failed: thm3"
        assert "with TrappedGeodesic" in call_args.kwargs['body']
        assert "3 geodesic(s)" in call_args.kwargs['body']

    def test_send_run_failure_without_details(self, patched_apprise):
        """Test that details are omitted when include_output is False."""
        notifier = Notifier(["discord://test/test"])
        notifier.send_run_failure("thm3", [FAILING], None, 2.0, False)

        body = patched_apprise.notify.call_args.kwargs['body']
        assert "1 of 1 criteria above threshold" in body
        assert "FAIL dn" not in body

    def test_send_run_failure_without_criteria(self, patched_apprise):
        """Test a run that recorded nothing says so."""
        notifier = Notifier(["discord://test/test"])
        notifier.send_run_failure("normal", [], None, None, True)

        body = patched_apprise.notify.call_args.kwargs['body']
        assert body == "Experiment 'normal' failed: no criteria recorded"

    def test_send_run_failure_truncation(self, patched_apprise):
        """Test the error text is truncated to the error limit."""
        long_error = "e" * (2 * ERROR_LIMIT)
        notifier = Notifier(["discord://test/test"])
        notifier.send_run_failure("volume", [], long_error, 1.0, True)

        body = patched_apprise.notify.call_args.kwargs['body']
        assert long_error[:ERROR_LIMIT] in body
        assert long_error[:ERROR_LIMIT + 1] not in body


class TestFormatCriterion:
    """Tests for the one-line criterion format."""

    @pytest.mark.parametrize("result,expected", [
        (PASSING, "PASS transport-residual: 1.000e-03 (threshold 5.0e-02)"),
        (FAILING, "FAIL dn: 3.000e-02 (threshold 1.0e-02)"),
    ])
    def test_format(self, result, expected):
        """Test verdict, name, value and threshold appear in order."""
        assert format_criterion(result) == expected
