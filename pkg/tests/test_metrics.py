import pytest

from dimaug.exceptions import MetricsError
from dimaug.metrics import METRIC_COLUMNS, MetricsWriter, read_metrics


class TestMetricsWriter:
    def test_rows_are_appended_in_order(self, tmp_path):
        path = tmp_path / 'm' / 'metrics.csv'
        writer = MetricsWriter(path, 'abc12345')
        writer.write('pretrain', 0, {'loss': 2.0, 'mean_lid': 3.5})
        writer.write('pretrain', 1, {'loss': 1.5})
        writer.write('search', 0, {'dda_loss': -1.2})
        frame = read_metrics(path)
        assert list(frame.columns) == METRIC_COLUMNS
        assert frame['stage'].tolist() == ['pretrain', 'pretrain', 'pretrain', 'search']
        assert frame['metric'].tolist() == ['loss', 'mean_lid', 'loss', 'dda_loss']
        assert frame['value'].tolist() == pytest.approx([2.0, 3.5, 1.5, -1.2])
        assert set(frame['run_id']) == {'abc12345'}

    def test_header_written_once_across_writers(self, tmp_path):
        path = tmp_path / 'metrics.csv'
        MetricsWriter(path, 'a').write('pretrain', 0, {'loss': 1.0})
        MetricsWriter(path, 'b').write('pretrain', 0, {'loss': 2.0})
        assert path.read_text(encoding='utf-8').count('run_id') == 1
        assert len(read_metrics(path)) == 2

    def test_epoch_cannot_go_back(self, tmp_path):
        writer = MetricsWriter(tmp_path / 'metrics.csv', 'r')
        writer.write('search', 2, {'loss': 1.0})
        with pytest.raises(MetricsError, match='went back'):
            writer.write('search', 1, {'loss': 1.0})

    def test_closed_stage_cannot_reopen(self, tmp_path):
        writer = MetricsWriter(tmp_path / 'metrics.csv', 'r')
        writer.write('pretrain', 0, {'loss': 1.0})
        writer.write('search', 0, {'loss': 1.0})
        with pytest.raises(MetricsError, match='already closed'):
            writer.write('pretrain', 1, {'loss': 1.0})

    def test_empty_metrics_write_nothing(self, tmp_path):
        path = tmp_path / 'metrics.csv'
        assert MetricsWriter(path, 'r').write('eval', 0, {}) == []
        assert not path.exists()

    def test_missing_file(self, tmp_path):
        with pytest.raises(MetricsError):
            read_metrics(tmp_path / 'absent.csv')
