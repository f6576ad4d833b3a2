"""Integration Tests

CLI とワークフローを実際に走らせる統合テスト。合成コーパスの生成と数ステップの学習を含むため、
ユニットテストより時間がかかります。過学習ランは slow マーカー付きです。

テストの実行:
    pytest tests/integration/ -m "integration and not slow"
    pytest -m slow
"""
