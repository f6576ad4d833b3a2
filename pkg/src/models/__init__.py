"""検出器の nn.Module 群

``src.core.factory`` が ``src.models.backbones`` を読み込むため、
ここではサブモジュールを読み込みません。
"""
