"""Services Layer - 再利用可能なヘルパー関数群"""

