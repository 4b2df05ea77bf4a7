"""测试模块。"""
